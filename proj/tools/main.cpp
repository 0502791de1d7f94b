// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include <string>
#include <vector>

#include "coopgen/cli.hpp"

int main(int argc, char** argv) { return coopgen::run_cli(std::vector<std::string>(argv, argv + argc)); }
