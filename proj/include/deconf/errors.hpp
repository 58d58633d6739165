#pragma once

#include <stdexcept>

namespace deconf {

// Input or artifact failed validation; maps to CLI exit code 2.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace deconf
