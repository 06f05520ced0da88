#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace anomex {

// Base for everything the library throws on contract violations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

// Raised when a localization metric is requested for a sample whose ground
// truth is empty. The Jaccard coefficient is undefined for good samples.
class GoodSampleError : public Error {
 public:
  using Error::Error;
};

// The surrogate design matrix does not have full column rank.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, std::vector<int> segments)
      : Error(what), segments_(std::move(segments)) {}

  /// Segment ids whose mask columns are linearly dependent on the others.
  const std::vector<int>& collinear_segments() const noexcept { return segments_; }

 private:
  std::vector<int> segments_;
};

}  // namespace anomex
