#pragma once

#include <stdexcept>
#include <string>

namespace udfs {

// Base for all library errors. CLI maps these to exit code 2 (data errors),
// except DivergedTraining which maps to 3.
struct UdfsError : std::runtime_error {
  explicit UdfsError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnreadableCapture : UdfsError {
  explicit UnreadableCapture(const std::string& msg)
      : UdfsError("UnreadableCapture: " + msg) {}
};

struct EmptyTrace : UdfsError {
  explicit EmptyTrace(const std::string& msg) : UdfsError("EmptyTrace: " + msg) {}
};

struct MalformedRecord : UdfsError {
  MalformedRecord(size_t line_number, const std::string& msg)
      : UdfsError("MalformedRecord: line " + std::to_string(line_number) + ": " + msg),
        line(line_number) {}
  size_t line;
};

struct DuplicateFlow : UdfsError {
  explicit DuplicateFlow(const std::string& msg) : UdfsError("DuplicateFlow: " + msg) {}
};

struct MissingTimestamp : UdfsError {
  explicit MissingTimestamp(const std::string& msg)
      : UdfsError("MissingTimestamp: " + msg) {}
};

struct HeterogeneousLength : UdfsError {
  explicit HeterogeneousLength(const std::string& msg)
      : UdfsError("HeterogeneousLength: " + msg) {}
};

struct EmptyBatch : UdfsError {
  explicit EmptyBatch(const std::string& msg) : UdfsError("EmptyBatch: " + msg) {}
};

struct ShapeMismatch : UdfsError {
  explicit ShapeMismatch(const std::string& msg) : UdfsError("ShapeMismatch: " + msg) {}
};

struct NonScalarLoss : UdfsError {
  explicit NonScalarLoss(const std::string& msg) : UdfsError("NonScalarLoss: " + msg) {}
};

struct OddModelDim : UdfsError {
  explicit OddModelDim(const std::string& msg) : UdfsError("OddModelDim: " + msg) {}
};

struct NonFiniteActivation : UdfsError {
  explicit NonFiniteActivation(const std::string& msg)
      : UdfsError("NonFiniteActivation: " + msg) {}
};

struct MissingPrototype : UdfsError {
  explicit MissingPrototype(const std::string& msg)
      : UdfsError("MissingPrototype: " + msg) {}
};

struct DivergedTraining : UdfsError {
  explicit DivergedTraining(const std::string& msg)
      : UdfsError("DivergedTraining: " + msg) {}
};

struct InsufficientSamples : UdfsError {
  explicit InsufficientSamples(const std::string& msg)
      : UdfsError("InsufficientSamples: " + msg) {}
};

struct EmptyClass : UdfsError {
  explicit EmptyClass(const std::string& msg) : UdfsError("EmptyClass: " + msg) {}
};

struct NoPrototypes : UdfsError {
  explicit NoPrototypes(const std::string& msg) : UdfsError("NoPrototypes: " + msg) {}
};

struct IdMismatch : UdfsError {
  explicit IdMismatch(const std::string& msg) : UdfsError("IdMismatch: " + msg) {}
};

struct ExhaustedRejectionSampling : UdfsError {
  explicit ExhaustedRejectionSampling(const std::string& msg)
      : UdfsError("ExhaustedRejectionSampling: " + msg) {}
};

struct InvalidConfig : UdfsError {
  explicit InvalidConfig(const std::string& msg) : UdfsError("InvalidConfig: " + msg) {}
};

}  // namespace udfs
