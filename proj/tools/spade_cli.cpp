// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "spade/cli.hpp"

int main(int argc, char** argv) { return spade::cli_dispatch(argc, argv, std::cout, std::cerr); }
