// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace swishnet {

/// Root of every exception thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed WAV header or truncated chunk.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Well-formed container with a codec we do not read.
class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid parameters: bad filterbank size, inconsistent residuals, too few files, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input shorter than an operation's minimum length (frames or samples).
class TooShortError : public Error {
 public:
  using Error::Error;
};

/// Bad magic, version or truncation in one of the binary containers.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Problems with user data: missing teacher logits, leaking manifests, unreadable lines.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite gradients and other optimizer failures.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace swishnet
