// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace qtune {

/// Raised for every validation failure in the library (bad shapes, bad
/// parameters, malformed files). The CLI maps it to exit code 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace qtune
