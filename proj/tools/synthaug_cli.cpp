// SPDX-License-Identifier: Apache-2.0

#include "synthaug/cli.hpp"

int main(int argc, char** argv) { return synthaug::cli::run(argc, argv); }
