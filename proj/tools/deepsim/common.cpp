#include "common.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "deepsim/tensor_io.hpp"

namespace deepsim::cli {

namespace {

std::string absolute(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal().string(); }

std::string absolute_path_value(const std::string& name, const std::string& value) {
  if (name == "run") {
    // NAME=DIR
    const auto eq = value.find('=');
    if (eq == std::string::npos) return absolute(value);
    return value.substr(0, eq + 1) + absolute(value.substr(eq + 1));
  }
  return absolute(value);
}

}  // namespace

std::vector<Command*> register_commands(CLI::App& app) {
  static std::vector<std::unique_ptr<Command>> storage;
  using Adder = void (*)(CLI::App&, Command&);
  const Adder adders[] = {add_gen_data, add_train_seg,   add_train_reg,  add_register,
                          add_evaluate, add_render_grid, add_compare_metrics};
  std::vector<Command*> out;
  for (Adder add : adders) {
    storage.push_back(std::make_unique<Command>());
    add(app, *storage.back());
    out.push_back(storage.back().get());
  }
  return out;
}

Json resolved_config(const Command& cmd) {
  Json options = Json::object();
  for (const CLI::Option* opt : cmd.app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->results();
    } else if (!opt->get_default_str().empty()) {
      values = {opt->get_default_str()};
    } else {
      continue;
    }
    for (auto& v : values) {
      if (cmd.path_options.count(name)) v = absolute_path_value(name, v);
      if (name == "metric") v = absolute_metric_spec(v);
      if (name == "metrics") {
        std::string joined;
        for (const auto& m : split_list(v)) joined += (joined.empty() ? "" : ",") + absolute_metric_spec(m);
        v = joined;
      }
    }
    options[name] = values;
  }
  return Json{{"tool", "deepsim"}, {"command", cmd.app->get_name()}, {"options", options}};
}

void write_config(const fs::path& file, const Command& cmd) { write_json(file, resolved_config(cmd)); }

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::string config_file;
  std::vector<std::string> rest;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_file = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_file = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_file.empty()) return args;

  Json cfg;
  try {
    cfg = read_json(config_file);
  } catch (const IoError&) {
    throw UsageError("cannot read config " + config_file);
  }
  if (cfg.value("command", "") != args[1]) {
    throw UsageError("config " + config_file + " belongs to '" + cfg.value("command", "?") + "', not '" + args[1] +
                     "'");
  }
  std::set<std::string> given;
  for (const auto& a : rest) {
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos
                                                                                           : a.find('=') - 2));
  }
  std::vector<std::string> out = {args[0], args[1]};
  for (const auto& [name, values] : cfg.at("options").items()) {
    if (given.count(name)) continue;
    for (const auto& v : values) {
      out.push_back("--" + name);
      out.push_back(v.get<std::string>());
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + file.string());
}

void write_json(const fs::path& file, const Json& j) { write_text(file, j.dump(2) + "\n"); }

Json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trace_csv(const std::vector<LossTerms>& trace) {
  std::string out = "step,data,reg,total\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i) + ',' + format_double(trace[i].data) + ',' + format_double(trace[i].reg) + ',' +
           format_double(trace[i].total) + '\n';
  }
  return out;
}

std::string absolute_metric_spec(const std::string& spec) {
  if (spec.rfind("deepsim:", 0) == 0 && spec.size() > 8) return "deepsim:" + absolute(spec.substr(8));
  return spec;
}

MetricKind load_metric(const std::string& spec) {
  if (spec.rfind("deepsim:", 0) == 0) {
    const fs::path ckpt = spec.substr(8);
    if (ckpt.empty() || !fs::exists(ckpt / "topology.json")) {
      throw UsageError("deepsim checkpoint not found: " + ckpt.string() + " (run train-seg first)");
    }
  }
  return parse_metric(spec);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace deepsim::cli
