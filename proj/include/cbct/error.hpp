// Copyright 2026 The cbct-recon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cbct {

/// Violated precondition on a public operation (bad sizes, out-of-range
/// parameters, mismatched geometry/data).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure detected at run time (non-finite iterate, degenerate
/// metric range, zero reference).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Volume/projection file errors. The kind is machine readable so callers
/// can distinguish a truncated file from an unreadable one.
class FormatError : public std::runtime_error {
public:
    enum class Kind { Io, CorruptHeader, LengthMismatch, UnsupportedDtype };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

namespace detail {

inline void require(bool cond, const std::string& msg)
{
    if (!cond)
        throw InvalidArgument(msg);
}

} // namespace detail
} // namespace cbct
