#include <cstdio>
int main() { std::puts("vmrbench: subcommands arrive with the CLI module"); }
