#pragma once

#include <stdexcept>
#include <string>

namespace cpift {

// All library failures surface as cpift::Error; messages start with the
// condition that was violated so callers and tests can match on them.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpift
