#pragma once

#include <stdexcept>
#include <string>

namespace corrtrack {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonPositiveDepth : public Error { public: using Error::Error; };
class EmptyPointMap : public Error { public: using Error::Error; };
class NoFeasibleStride : public Error { public: using Error::Error; };
class NoPositives : public Error { public: using Error::Error; };
class EmptyMatchSet : public Error { public: using Error::Error; };
class EmptyLabels : public Error { public: using Error::Error; };
class ShapeMismatch : public Error { public: using Error::Error; };
class OutOfBounds : public Error { public: using Error::Error; };
class MissingDepth : public Error { public: using Error::Error; };
class EmptyEval : public Error { public: using Error::Error; };
class ZeroNormPrediction : public Error { public: using Error::Error; };
class ArchMismatch : public Error { public: using Error::Error; };
class QueryMismatch : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };

}  // namespace corrtrack
