#pragma once

#include <stdexcept>
#include <string>

namespace eit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GeometryError : public Error { using Error::Error; };
class MeshingError : public Error { using Error::Error; };
class SingularSystemError : public Error { using Error::Error; };
class SolverError : public Error { using Error::Error; };
class IllConditionedError : public Error { using Error::Error; };
class ProvenanceError : public Error { using Error::Error; };
class DegenerateDataError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class SingularGramError : public Error { using Error::Error; };
class EmptyImageError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

}  // namespace eit
