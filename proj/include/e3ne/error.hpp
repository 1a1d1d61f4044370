#pragma once

#include <stdexcept>
#include <string>

namespace e3ne {

// Stable error classes. The numeric value doubles as the CLI exit code.
enum class ErrorKind : int {
    Parse = 10,
    Shape = 11,
    MissingParams = 12,
    DegenerateWeights = 20,
    NegativeInput = 21,
    EmptyCalibrationSet = 22,
    Requant = 23,
    Unsupported = 24,
    Plan = 30,
    Capacity = 31,
    FieldOverflow = 40,
    IllegalOpcode = 41,
    Codegen = 50,
    SimFault = 60,
    PsumOverflow = 61,
    Io = 70,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

#define E3NE_ERROR_CLASS(Name, Kind)                                   \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what) : Error(Kind, what) {}  \
    }

E3NE_ERROR_CLASS(ParseError, ErrorKind::Parse);
E3NE_ERROR_CLASS(ShapeError, ErrorKind::Shape);
E3NE_ERROR_CLASS(MissingParams, ErrorKind::MissingParams);
E3NE_ERROR_CLASS(DegenerateWeights, ErrorKind::DegenerateWeights);
E3NE_ERROR_CLASS(NegativeInput, ErrorKind::NegativeInput);
E3NE_ERROR_CLASS(EmptyCalibrationSet, ErrorKind::EmptyCalibrationSet);
E3NE_ERROR_CLASS(RequantError, ErrorKind::Requant);
E3NE_ERROR_CLASS(UnsupportedError, ErrorKind::Unsupported);
E3NE_ERROR_CLASS(PlanError, ErrorKind::Plan);
E3NE_ERROR_CLASS(CapacityError, ErrorKind::Capacity);
E3NE_ERROR_CLASS(FieldOverflow, ErrorKind::FieldOverflow);
E3NE_ERROR_CLASS(CodegenError, ErrorKind::Codegen);
E3NE_ERROR_CLASS(PsumOverflow, ErrorKind::PsumOverflow);
E3NE_ERROR_CLASS(IoError, ErrorKind::Io);

#undef E3NE_ERROR_CLASS

class IllegalOpcode : public Error {
public:
    IllegalOpcode(const std::string& what, long index = -1)
        : Error(ErrorKind::IllegalOpcode, what), index_(index) {}
    // Word index inside a program stream, -1 when decoding a lone word.
    long index() const noexcept { return index_; }

private:
    long index_;
};

class SimFault : public Error {
public:
    SimFault(const std::string& what, long long cycle, long pc)
        : Error(ErrorKind::SimFault, what + " (cycle " + std::to_string(cycle) +
                                         ", pc " + std::to_string(pc) + ")"),
          cycle_(cycle), pc_(pc) {}
    long long cycle() const noexcept { return cycle_; }
    long pc() const noexcept { return pc_; }

private:
    long long cycle_;
    long pc_;
};

}  // namespace e3ne
