// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "cgdrcn/cli.hpp"

int main(int argc, char** argv) { return cgdrcn::run(argc, argv, std::cout, std::cerr); }
