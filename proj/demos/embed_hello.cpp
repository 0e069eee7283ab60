// SPDX-License-Identifier: Apache-2.0
//
// Minimal embedding example: build a module in memory that calls the
// host's `write` syscall import, then run it under the syscall layer.
#include <cstdio>
#include <memory>
#include <string>

#include "wali/runtime.hpp"
#include "wali/wasm/builder.hpp"
#include "wali/wasm/parser.hpp"
#include "wali/wasm/validator.hpp"

int main() {
  using namespace wali;
  using wasm::ValType;

  const std::string text = "hello from an embedded module\n";

  wasm::ModuleBuilder b;
  uint32_t write_fn = b.import_func(
      "wali", "write",
      {{ValType::I64, ValType::I64, ValType::I64}, {ValType::I64}});
  b.add_memory(1);

  const uint32_t buf = 16;
  b.add_data(buf, std::vector<uint8_t>(text.begin(), text.end()));

  wasm::CodeBuilder code;
  code.i64_const(1)                                  // fd
      .i64_const(buf)                                // buffer offset
      .i64_const(static_cast<int64_t>(text.size()))  // length
      .call(write_fn)
      .op(wasm::op::kDrop);
  uint32_t start = b.add_func({{}, {}}, {}, code.finish());
  b.export_func("_start", start);

  auto module = std::make_shared<wasm::Module>(wasm::parse_module(b.build()));
  wasm::validate(*module);

  RuntimeOptions opts;
  opts.argv = {"embed_hello"};
  WaliRuntime rt(module, std::move(opts));
  RunResult result = rt.run();
  if (result.kind == RunResult::Kind::Trap) {
    std::fprintf(stderr, "trap: %s\n", result.trap_message.c_str());
    return 1;
  }
  return result.code;
}
