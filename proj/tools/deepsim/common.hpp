#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepsim/registration.hpp"
#include "deepsim/similarity.hpp"

namespace deepsim::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// Bad flags or unmet preconditions; exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum ExitCode : int { kOk = 0, kIoFailure = 1, kUsage = 2, kDiverged = 3 };

struct Command {
  CLI::App* app = nullptr;
  std::set<std::string> path_options;  // values resolved to absolute paths in config.json
  std::function<int()> run;
};

// Registers every subcommand on `app`.
std::vector<Command*> register_commands(CLI::App& app);

void add_gen_data(CLI::App& app, Command& cmd);
void add_train_seg(CLI::App& app, Command& cmd);
void add_train_reg(CLI::App& app, Command& cmd);
void add_register(CLI::App& app, Command& cmd);
void add_compare_metrics(CLI::App& app, Command& cmd);
void add_evaluate(CLI::App& app, Command& cmd);
void add_render_grid(CLI::App& app, Command& cmd);

// The resolved options of a parsed subcommand, as written to config.json.
Json resolved_config(const Command& cmd);
void write_config(const fs::path& file, const Command& cmd);

// Rewrites argv so `--config file` expands to the stored options; options
// given explicitly on the command line win.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

void write_text(const fs::path& file, const std::string& text);
void write_json(const fs::path& file, const Json& j);
Json read_json(const fs::path& file);

std::string trace_csv(const std::vector<LossTerms>& trace);

// Loads a metric; a missing deepsim checkpoint is a precondition failure.
MetricKind load_metric(const std::string& spec);
std::string absolute_metric_spec(const std::string& spec);

std::vector<std::string> split_list(const std::string& text, char sep = ',');
std::string format_double(double v);

inline constexpr const char* kMetricHelp = "mse | ncc[:win] | nccsup[:win[:weight]] | deepsim:<checkpoint> | randsim:<seed>";

template <typename... Args>
void progress(const Args&... args) {
  std::ostringstream line;
  (line << ... << args);
  line << '\n';
  std::cerr << line.str() << std::flush;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure by
// index is rethrown, so errors do not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace deepsim::cli
