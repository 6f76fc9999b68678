// Copyright (C) 2026 The tmd Authors
// SPDX-License-Identifier: Apache-2.0

// UqModel files: the tensor container with F64 tensors for statistics,
// projector, weights and HUQ references, plus a "meta" JSON blob.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "tmd/regress.hpp"

namespace tmd::model_io {

inline constexpr std::string_view kModelVersion = "uqmodel/1";

std::string encode_model(const regress::UqModel& model);
/// Throws DataError on malformed or inconsistent model files.
regress::UqModel decode_model(std::string_view bytes);

void save_model(const std::filesystem::path& path, const regress::UqModel& model);
regress::UqModel load_model(const std::filesystem::path& path);

}  // namespace tmd::model_io
