// SPDX-License-Identifier: Apache-2.0
//
// Prints how many signal safepoints each instrumentation scheme inserts
// into a module, alongside the code-size cost.
#include <cstdio>
#include <fstream>
#include <iterator>
#include <vector>

#include "wali/instrument.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <module.wasm>\n", argv[0]);
    return 2;
  }
  std::ifstream in(argv[1], std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "cannot open %s\n", argv[1]);
    return 2;
  }
  std::vector<uint8_t> bytes(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>{});

  wali::wasm::Module base = wali::wasm::parse_module(bytes);
  std::printf("%-10s %12s %12s\n", "scheme", "safepoints", "bytes");
  std::printf("%-10s %12s %12zu\n", "(none)", "-", bytes.size());
  for (auto scheme : {wali::SafepointScheme::Loop, wali::SafepointScheme::Function,
                      wali::SafepointScheme::All}) {
    std::vector<uint8_t> out = wali::instrument(bytes, scheme);
    std::printf("%-10s %12zu %12zu\n", wali::to_string(scheme),
                wali::count_safepoints(out), out.size());
  }
  std::printf("instructions in defined bodies: %zu\n",
              wali::count_instructions(base));
  return 0;
}
