#pragma once

#include <stdexcept>
#include <string>

namespace kalm {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateRotationError : Error {
    explicit DegenerateRotationError(const std::string& msg) : Error(msg) {}
};

struct OutOfBoundsError : Error {
    explicit OutOfBoundsError(const std::string& msg) : Error(msg) {}
};

struct CountExceedsCloudError : Error {
    explicit CountExceedsCloudError(const std::string& msg) : Error(msg) {}
};

struct ZeroVectorError : Error {
    explicit ZeroVectorError(const std::string& msg) : Error(msg) {}
};

struct MissingFeatureFileError : Error {
    explicit MissingFeatureFileError(const std::string& msg) : Error(msg) {}
};

struct IndexMismatchError : Error {
    explicit IndexMismatchError(const std::string& msg) : Error(msg) {}
};

struct EmptySceneError : Error {
    explicit EmptySceneError(const std::string& msg) : Error(msg) {}
};

struct SpecTooFineError : Error {
    explicit SpecTooFineError(const std::string& msg) : Error(msg) {}
};

struct UnknownLabelError : Error {
    explicit UnknownLabelError(const std::string& msg) : Error(msg) {}
};

struct NoMasksError : Error {
    explicit NoMasksError(const std::string& msg) : Error(msg) {}
};

struct MissingMaskFileError : Error {
    explicit MissingMaskFileError(const std::string& msg) : Error(msg) {}
};

// A backend (remote endpoint, scripted scenario, replay transcript) failed
// outright: network error, exhausted scenario, injected failure.
struct BackendError : Error {
    explicit BackendError(const std::string& msg) : Error(msg) {}
};

// A backend answered but the answer could not be turned into a usable
// result (missing fenced block, unknown grid label, index out of range).
struct ParseError : Error {
    enum class Kind { MissingBlock, BadJson, UnknownLabel, IndexOutOfRange };
    ParseError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
    Kind kind;
};

struct ShapeMismatchError : Error {
    explicit ShapeMismatchError(const std::string& msg) : Error(msg) {}
};

struct DimensionMismatchError : Error {
    explicit DimensionMismatchError(const std::string& msg) : Error(msg) {}
};

struct StartInCollisionError : Error {
    explicit StartInCollisionError(const std::string& msg) : Error(msg) {}
};

struct GoalInCollisionError : Error {
    explicit GoalInCollisionError(const std::string& msg) : Error(msg) {}
};

struct AllKeypointsNullError : Error {
    explicit AllKeypointsNullError(const std::string& msg) : Error(msg) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace kalm
