#pragma once

namespace prefdrive::cli {

int run(int argc, char** argv);

} // namespace prefdrive::cli
