// Copyright (c) 2026, morekit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>

namespace morekit {

/// File-system read/write failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace morekit
