#pragma once

#include <stdexcept>
#include <string>

namespace ladiff {

// Every failure the library reports derives from Error so callers (the CLI in
// particular) can catch one type and still tell the categories apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error { using Error::Error; };
class UnknownKeyError : public ConfigError { using ConfigError::ConfigError; };
class TypeMismatchError : public ConfigError { using ConfigError::ConfigError; };
class DomainError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class VocabularyError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class ChecksumError : public FormatError { using FormatError::FormatError; };
class DigestMismatchError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class ExtractorQualityError : public Error { using Error::Error; };
class MissingArtifactError : public Error { using Error::Error; };

}  // namespace ladiff
