#pragma once

#include <stdexcept>
#include <string>

namespace perclab {

// common base so callers can catch everything from this library at once
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define PERCLAB_DEFINE_ERROR(Name)          \
    struct Name : Error {                   \
        using Error::Error;                 \
    }

// geometry / preconditions
PERCLAB_DEFINE_ERROR(OutOfDomain);
PERCLAB_DEFINE_ERROR(DomainTooSmall);
PERCLAB_DEFINE_ERROR(PointOutsideRegion);
PERCLAB_DEFINE_ERROR(GeometryTooTight);
PERCLAB_DEFINE_ERROR(MarginTooSmall);
PERCLAB_DEFINE_ERROR(OddPointCount);

// analysis
PERCLAB_DEFINE_ERROR(DegenerateInput);
PERCLAB_DEFINE_ERROR(CoincidentPoints);
PERCLAB_DEFINE_ERROR(InconsistentInputs);
PERCLAB_DEFINE_ERROR(MissingSweep);

// oracle
PERCLAB_DEFINE_ERROR(PatchTooLarge);

// cli / persistence
PERCLAB_DEFINE_ERROR(ConfigInvalid);
PERCLAB_DEFINE_ERROR(CorruptCheckpoint);
PERCLAB_DEFINE_ERROR(MissingData);
PERCLAB_DEFINE_ERROR(IoError);

#undef PERCLAB_DEFINE_ERROR

} // namespace perclab
