#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vmr {

// Constraint kinds used in infeasibility and validation reports.
enum class Constraint {
  CpuCapacity,
  MemCapacity,
  NumaShape,
  Affinity,
  NoOpMove,
  MigrationLimit,
  Placement,
};

inline const char* to_string(Constraint c) {
  switch (c) {
    case Constraint::CpuCapacity: return "cpu-capacity";
    case Constraint::MemCapacity: return "memory-capacity";
    case Constraint::NumaShape: return "numa-shape";
    case Constraint::Affinity: return "anti-affinity";
    case Constraint::NoOpMove: return "no-op-move";
    case Constraint::MigrationLimit: return "migration-limit";
    case Constraint::Placement: return "placement";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

// A migration that cannot be applied; carries the violated constraint.
class InfeasibleError : public Error {
 public:
  InfeasibleError(Constraint c, const std::string& what)
      : Error(what), constraint_(c) {}
  Constraint constraint() const { return constraint_; }

 private:
  Constraint constraint_;
};

// Invalid cluster state or mapping file; carries every violation found.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& vs) {
    std::string out = "validation failed:";
    for (const auto& v : vs) {
      out += "\n  - ";
      out += v;
    }
    return out;
  }
  std::vector<std::string> violations_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API contract (e.g. mismatched before/after states).
class ContractError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class SchedulingError : public Error {
 public:
  using Error::Error;
};

}  // namespace vmr
