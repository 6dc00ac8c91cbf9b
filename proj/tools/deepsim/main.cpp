#include <iostream>

#include "common.hpp"
#include "deepsim/image.hpp"
#include "deepsim/registration.hpp"
#include "deepsim/tensor_io.hpp"

int main(int argc, char** argv) {
  using namespace deepsim::cli;

  CLI::App app{"Registration with learned feature similarity", "deepsim"};
  app.set_version_flag("--version", "deepsim 0.1.0");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  const auto commands = register_commands(app);
  for (Command* c : commands) {
    c->app->add_option("--config", "Replay a config.json written by an earlier run");
  }

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  for (Command* c : commands) {
    if (!c->app->parsed()) continue;
    try {
      return c->run();
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kUsage;
    } catch (const deepsim::DivergenceError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kDiverged;
    } catch (const deepsim::IoError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kIoFailure;
    } catch (const std::filesystem::filesystem_error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kIoFailure;
    } catch (const std::invalid_argument& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kUsage;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kIoFailure;
    }
  }
  return kUsage;
}
