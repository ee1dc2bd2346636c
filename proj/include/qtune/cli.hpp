// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace qtune {

/// Runs the command-line tool. Returns 0 on success and 2 on any usage or
/// validation error, after printing a single-line diagnostic to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qtune
