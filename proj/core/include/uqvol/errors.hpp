#pragma once

#include <stdexcept>
#include <string>

namespace uqvol {

// Base class for all library errors. The CLI maps these to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};
struct ConstantVolume : Error {
  using Error::Error;
};
struct VolumeTooSmall : Error {
  using Error::Error;
};
struct IndivisibleChannels : Error {
  using Error::Error;
};
struct OddSpatialDim : Error {
  using Error::Error;
};
struct BadRate : Error {
  using Error::Error;
};
struct BadConfig : Error {
  using Error::Error;
};
struct BadShape : Error {
  using Error::Error;
};
struct EmptyDataset : Error {
  using Error::Error;
};
struct EmptySamples : Error {
  using Error::Error;
};
struct IndivisibleSamples : Error {
  using Error::Error;
};
struct VolumeSmallerThanPatch : Error {
  using Error::Error;
};
struct BadMagic : Error {
  using Error::Error;
};
struct TruncatedPayload : Error {
  using Error::Error;
};
struct UnsupportedVersion : Error {
  using Error::Error;
};
struct BodyDoesNotFit : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace uqvol
