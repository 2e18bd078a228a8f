#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ganf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `ganf` subcommand; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_main(int argc, char** argv);

/// One timed configuration of the training-iteration benchmark.
struct BenchCase {
  std::size_t nodes = 8;
  std::size_t steps = 20;
  std::size_t batch = 8;
  std::size_t attrs = 1;
  std::size_t hidden = 4;
  std::size_t flow_hidden = 4;
  std::size_t flow_blocks = 1;
  std::size_t iterations = 5;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
};

/// Median over `repeats` of the mean wall time of one Adam iteration
/// (forward, backward, update) on random data.
double seconds_per_iteration(const BenchCase& c);

}  // namespace ganf::cli
