// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return shapenet::cli::run(argc, argv, std::cout, std::cerr); }
