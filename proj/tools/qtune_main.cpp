// Copyright (C) 2026 The qtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtune/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return qtune::run_cli(argc, argv, std::cout, std::cerr);
}
