#pragma once

#include <stdexcept>
#include <string>

namespace bsem {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bsem
