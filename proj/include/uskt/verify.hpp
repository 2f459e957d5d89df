// Copyright 2026 The USKT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "uskt/gradcheck.hpp"
#include "uskt/tensor.hpp"

namespace uskt {

/// A self-check (gradient check, oracle gate) did not hold.
class VerificationError : public Error {
 public:
  using Error::Error;
};

struct GradCheckRow {
  std::string scope;
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks in double precision. scope is one of
/// "ops", "birssm", "uskt-mini" or "all".
std::vector<GradCheckRow> gradcheck_suite(std::string_view scope, std::uint64_t seed = 7);

struct BenchConfig {
  std::vector<Index> seq_lens{64, 256, 1024};
  Index width = 128;
  Index state = 16;
  int repeats = 5;
  int warmups = 3;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string variant;  // scan_sequential, scan_parallel, bir_ssm, bi_ssm
  Index length = 0;
  double wall_ns_median = 0.0;
  Index param_count = 0;  // SSM-core parameters
};

/// Times the scan kernels and both bidirectional blocks. Before timing, it
/// checks that the parallel scan reproduces the sequential one and that the
/// Bi-SSM core holds exactly twice the BiR-SSM core parameters; a failed
/// check raises VerificationError.
std::vector<BenchRow> run_bench(const BenchConfig& cfg);

}  // namespace uskt
