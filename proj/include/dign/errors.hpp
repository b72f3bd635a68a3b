// Copyright (c) 2026, The dign authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dign {

/// Tensor shapes that cannot be combined.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument("dimension error: " + what) {}
};

/// A caller broke a documented precondition.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error("contract error: " + what) {}
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument("config error: " + what) {}
};

/// Malformed or invalid scene/checkpoint/config file. The message names the offending field.
class LoadError : public std::runtime_error {
 public:
  explicit LoadError(const std::string& what) : std::runtime_error("load error: " + what) {}
};

}  // namespace dign
