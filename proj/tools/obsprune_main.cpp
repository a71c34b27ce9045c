// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "obsprune/cli.hpp"

int main(int argc, char** argv) { return obsprune::run_cli(argc, argv); }
