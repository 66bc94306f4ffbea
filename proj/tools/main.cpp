// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
#include "sparsederf/cli.hpp"

int main(int argc, char** argv) { return sderf::run_cli(argc, argv); }
