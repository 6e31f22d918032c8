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

#include <filesystem>

#include "stbasv/tensor.hpp"

namespace stbasv::io {

// Binary tensor file: magic "STBT", version byte, rank byte, extents as
// little-endian u32, then the row-major float64 payload, little-endian.
// Writing the same tensor twice produces byte-identical files.

void save_tensor(const std::filesystem::path& path, const Tensor& t);

// Throws MissingArtifactError if the file does not exist, IoError if it is
// not a well-formed tensor file.
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace stbasv::io
