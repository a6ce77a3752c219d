#pragma once

#include <stdexcept>
#include <string>

namespace ampse {

// All recoverable failures carry a stable machine-readable code plus a
// human message. CLI maps codes to exit status.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(code + ": " + msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

#define AMPSE_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                   \
    public:                                                       \
        explicit Name(const std::string& msg) : Error(#Name, msg) {} \
    }

AMPSE_DEFINE_ERROR(ParseError);
AMPSE_DEFINE_ERROR(UnknownFormula);
AMPSE_DEFINE_ERROR(BindingError);
AMPSE_DEFINE_ERROR(OutOfBounds);
AMPSE_DEFINE_ERROR(MissingPort);
AMPSE_DEFINE_ERROR(CycleError);
AMPSE_DEFINE_ERROR(MissingEvaluator);
AMPSE_DEFINE_ERROR(ShapeError);
AMPSE_DEFINE_ERROR(FilterStarvation);
AMPSE_DEFINE_ERROR(DivergedError);
AMPSE_DEFINE_ERROR(MissingInput);
AMPSE_DEFINE_ERROR(EmptyDataset);
AMPSE_DEFINE_ERROR(SingleClassError);
AMPSE_DEFINE_ERROR(LengthMismatch);
AMPSE_DEFINE_ERROR(NestedAdapter);
AMPSE_DEFINE_ERROR(NoModels);
AMPSE_DEFINE_ERROR(NonFiniteLoss);
AMPSE_DEFINE_ERROR(MissingOracleSpecs);
AMPSE_DEFINE_ERROR(UnknownKey);
AMPSE_DEFINE_ERROR(HashMismatch);
AMPSE_DEFINE_ERROR(VersionUnsupported);
AMPSE_DEFINE_ERROR(IoError);

#undef AMPSE_DEFINE_ERROR

} // namespace ampse
