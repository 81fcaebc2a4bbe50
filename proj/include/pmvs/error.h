#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pmvs {

// Base class for every error the library throws. The CLI maps these onto
// exit codes: ConfigError/PlanError -> usage-ish data errors, the rest -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class ImageTooSmall : public Error {
 public:
  using Error::Error;
};

enum class GeometryFailure { kDegeneratePlane, kBehindCamera };

class GeometryError : public Error {
 public:
  GeometryError(GeometryFailure failure, const std::string& what)
      : Error(what), failure_(failure) {}
  GeometryFailure failure() const { return failure_; }

 private:
  GeometryFailure failure_;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class StageIOError : public Error {
 public:
  StageIOError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class LedgerMismatch : public Error {
 public:
  using Error::Error;
};

class FusionInputError : public Error {
 public:
  using Error::Error;
};

class SceneError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmvs
