/* Copyright 2026 The stb-asv Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace stbasv {

// Malformed configuration or invalid invocation. CLI exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A required input artifact (dataset, checkpoint, manifest entry) is absent
// or unreadable. CLI exit code 2.
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A verification property failed. CLI exit code 3.
struct PropertyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed bytes on disk: tensor files, checkpoints, manifests.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace stbasv
