// SPDX-License-Identifier: Apache-2.0
//
// wali command line: runs Wasm modules against the Linux syscall layer,
// rewrites modules with safepoint instrumentation, and reports on syscall
// surfaces.
//
// Exit codes for `run`: the guest's own exit status (0..125 pass through),
// 134 for a trapped execution, 2 for modules that fail to parse, validate,
// or instantiate.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "wali/atlas.hpp"
#include "wali/instrument.hpp"
#include "wali/registry.hpp"
#include "wali/runtime.hpp"
#include "wali/wasm/parser.hpp"
#include "wali/wasm/validator.hpp"

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw wali::ConfigError("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw wali::ConfigError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw wali::ConfigError("short write to " + path);
}

std::string self_path() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) return {};
  buf[n] = '\0';
  return buf;
}

int cmd_run(const std::string& module_path, const std::vector<std::string>& guest_args,
            const std::vector<std::string>& env, const std::string& policy_path,
            const std::string& trace_path, const std::string& scheme_name,
            uint32_t max_pages, const std::string& argv0) {
  std::vector<uint8_t> bytes;
  std::shared_ptr<const wali::wasm::Module> module;
  try {
    bytes = read_file(module_path);
    if (scheme_name != "off") {
      auto scheme = wali::parse_safepoint_scheme(scheme_name);
      if (!scheme) {
        std::cerr << "wali: unknown safepoint scheme: " << scheme_name << "\n";
        return 2;
      }
      bytes = wali::instrument(bytes, *scheme);
    }
    auto m = std::make_shared<wali::wasm::Module>(wali::wasm::parse_module(bytes));
    wali::wasm::validate(*m);
    module = m;
  } catch (const std::exception& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  }

  wali::RuntimeOptions opts;
  opts.argv.push_back(argv0.empty() ? module_path : argv0);
  opts.argv.insert(opts.argv.end(), guest_args.begin(), guest_args.end());
  opts.env = env;
  opts.max_pages = max_pages;
  opts.runner_path = self_path();

  try {
    if (!policy_path.empty()) {
      wali::Registry reg = wali::Registry::load();
      std::set<std::string, std::less<>> known;
      for (const auto& s : reg.specs()) known.insert(s.name);
      opts.policy = std::make_shared<wali::Policy>(wali::Policy::load_file(
          policy_path,
          [&known](std::string_view n) { return known.count(n) != 0; }));
    }
    if (!trace_path.empty())
      opts.trace = std::make_shared<wali::TraceWriter>(trace_path);
  } catch (const std::exception& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  }

  try {
    wali::WaliRuntime rt(std::move(module), std::move(opts));
    wali::RunResult result = rt.run();
    if (result.kind == wali::RunResult::Kind::Trap) {
      std::cerr << "wali: trap: " << result.trap_message << "\n";
      return 134;
    }
    return result.code;
  } catch (const wali::InstantiationError& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  } catch (const wali::ConfigError& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  } catch (const wali::Trap& e) {
    std::cerr << "wali: trap: " << e.what() << "\n";
    return 134;
  }
}

int cmd_instrument(const std::string& in_path, const std::string& out_path,
                   const std::string& scheme_name) {
  auto scheme = wali::parse_safepoint_scheme(scheme_name);
  if (!scheme) {
    std::cerr << "wali: unknown safepoint scheme: " << scheme_name << "\n";
    return 2;
  }
  try {
    std::vector<uint8_t> out = wali::instrument(read_file(in_path), *scheme);
    wali::wasm::Module check = wali::wasm::parse_module(out);
    wali::wasm::validate(check);
    write_file(out_path, out);
    std::fprintf(stderr, "instrumented %s: %zu safepoints (%s scheme)\n",
                 in_path.c_str(), wali::count_safepoints(check),
                 wali::to_string(*scheme));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  }
}

int cmd_atlas_similarity(const std::vector<std::string>& paths,
                         const std::string& csv_path, const std::string& abi_csv) {
  try {
    std::optional<std::set<std::string>> override_set;
    if (!abi_csv.empty()) {
      std::set<std::string> abis;
      std::istringstream is(abi_csv);
      std::string tok;
      while (std::getline(is, tok, ',')) {
        if (!tok.empty()) abis.insert(tok);
      }
      override_set = std::move(abis);
    }
    std::vector<wali::atlas::SyscallTable> tables;
    for (const auto& p : paths)
      tables.push_back(wali::atlas::load_syscall_table(p, override_set));
    auto matrix = wali::atlas::similarity_matrix(tables);
    if (csv_path.empty()) {
      wali::atlas::write_similarity_csv(std::cout, tables, matrix);
    } else {
      std::ofstream out(csv_path, std::ios::trunc);
      if (!out) throw wali::ConfigError("cannot open " + csv_path + " for writing");
      wali::atlas::write_similarity_csv(out, tables, matrix);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  }
}

int cmd_atlas_profile(const std::vector<std::string>& paths,
                      const std::string& csv_path, const std::string& registry_name) {
  try {
    if (registry_name != "builtin") {
      std::cerr << "wali: unknown registry \"" << registry_name
                << "\" (only \"builtin\" is available)\n";
      return 2;
    }
    std::set<std::string> implemented;
    for (const auto& name : wali::Registry::load().implemented_names())
      implemented.insert(name);
    std::vector<wali::atlas::AppProfile> apps;
    for (const auto& p : paths) apps.push_back(wali::atlas::load_strace_summary(p));
    auto report = wali::atlas::profile_report(apps, implemented);
    if (csv_path.empty()) {
      wali::atlas::write_profile_csv(std::cout, report);
    } else {
      std::ofstream out(csv_path, std::ios::trunc);
      if (!out) throw wali::ConfigError("cannot open " + csv_path + " for writing");
      wali::atlas::write_profile_csv(out, report);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "wali: " << e.what() << "\n";
    return 2;
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"WALI: a Linux syscall interface for WebAssembly"};
  app.require_subcommand(1);

  // run
  std::string module_path, policy_path, trace_path, argv0;
  std::string scheme_name = "loop";
  std::vector<std::string> env_kv, guest_args;
  uint32_t max_pages = 0;
  CLI::App* run = app.add_subcommand("run", "Run a Wasm module");
  run->add_option("module", module_path, "Wasm module path")->required();
  run->add_option("--env", env_kv, "Add KEY=VALUE to the guest environment");
  run->add_option("--policy", policy_path, "Syscall policy file");
  run->add_option("--trace", trace_path, "Write a JSON-lines syscall trace");
  run->add_option("--safepoint-scheme", scheme_name,
                  "Signal safepoint scheme: loop|function|all|off")
      ->check(CLI::IsMember({"loop", "function", "all", "off"}));
  run->add_option("--max-pages", max_pages, "Linear memory page limit");
  run->add_option("--argv0", argv0, "Override the guest argv[0]")
      ->group(""); // hidden; used by execve re-exec
  run->add_option("args", guest_args, "Guest arguments (after --)");
  run->positionals_at_end();

  // instrument
  std::string in_path, out_path;
  std::string instr_scheme = "loop";
  CLI::App* instr = app.add_subcommand("instrument", "Insert signal safepoints");
  instr->add_option("input", in_path, "Input Wasm module")->required();
  instr->add_option("-o,--output", out_path, "Output path")->required();
  instr->add_option("--scheme", instr_scheme, "loop|function|all")
      ->check(CLI::IsMember({"loop", "function", "all"}));

  // atlas
  CLI::App* atlas = app.add_subcommand("atlas", "Syscall surface analysis");
  atlas->require_subcommand(1);
  std::vector<std::string> tbl_paths, profile_paths;
  std::string sim_csv, prof_csv, abi_csv;
  std::string registry_name = "builtin";
  CLI::App* sim = atlas->add_subcommand(
      "similarity", "Jaccard similarity across kernel syscall tables");
  sim->add_option("tables", tbl_paths, "syscall.tbl files")->required()->expected(-2);
  sim->add_option("--csv", sim_csv, "Output CSV path (default stdout)");
  sim->add_option("--abi", abi_csv,
                  "Comma-separated ABI tags (overrides per-file inference)");
  CLI::App* prof = atlas->add_subcommand(
      "profile", "Aggregate strace -c summaries into a frequency report");
  prof->add_option("summaries", profile_paths, "strace -c output files")
      ->required()
      ->expected(-1);
  prof->add_option("--csv", prof_csv, "Output CSV path (default stdout)");
  prof->add_option("--registry", registry_name,
                   "Implemented-syscall set for coverage (builtin)");

  CLI11_PARSE(app, argc, argv);

  for (const auto& kv : env_kv) {
    if (kv.find('=') == std::string::npos) {
      std::cerr << "wali: --env expects KEY=VALUE, got \"" << kv << "\"\n";
      return 2;
    }
  }

  if (run->parsed())
    return cmd_run(module_path, guest_args, env_kv, policy_path, trace_path,
                   scheme_name, max_pages, argv0);
  if (instr->parsed()) return cmd_instrument(in_path, out_path, instr_scheme);
  if (sim->parsed()) return cmd_atlas_similarity(tbl_paths, sim_csv, abi_csv);
  if (prof->parsed()) return cmd_atlas_profile(profile_paths, prof_csv, registry_name);
  return 2;
}
