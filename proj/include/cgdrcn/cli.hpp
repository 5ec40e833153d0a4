// SPDX-License-Identifier: Apache-2.0
//
// `cgdrcn <train|eval|stats|render-density|synth> [flags]`
//
// Settings resolve as flag > config file (--config, flat `key = value`) > default. Config keys
// are the TrainConfig / LossConfig / ModelConfig field names.
#pragma once

#include <ostream>
#include <stdexcept>

#include "cgdrcn/kvfile.hpp"
#include "cgdrcn/losses.hpp"
#include "cgdrcn/network.hpp"
#include "cgdrcn/trainer.hpp"

namespace cgdrcn {

/// Bad invocation: exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunSettings {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
};

/// Applies `config_file`, then `overrides`, on top of the defaults. Unknown keys are a UsageError.
RunSettings resolve_settings(const KeyValues& config_file, const KeyValues& overrides);

/// Returns the process exit code: 0 success, 1 runtime error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cgdrcn
