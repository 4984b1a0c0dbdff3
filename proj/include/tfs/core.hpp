// tfskit -- typed feature structure grammar development kit
// common identifiers and error type

#ifndef TFS_CORE_HPP
#define TFS_CORE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tfs {

using TypeId = std::int32_t;   // index into the type lattice; kTopType is 0
using FeatId = std::int32_t;   // feature names, interned in declaration order
using NodeId = std::int32_t;   // node index within one FeatureStructure
using GroupId = std::int64_t;  // disjunction group, unique per process

inline constexpr TypeId kTopType = 0;
inline constexpr TypeId kAtomRoot = 1;  // common supertype of all atoms
inline constexpr NodeId kNoNode = -1;

struct SourceLoc {
  std::string file;
  int line = 0;
  int col = 0;
  bool valid() const { return line > 0; }
  std::string str() const {
    if (!valid()) return file.empty() ? std::string("<unknown>") : file;
    return file + ":" + std::to_string(line) + ":" + std::to_string(col);
  }
};

// User-facing error (bad input, bad grammar, bad config). Unification
// failure is not an error; it is a normal optional-empty return.
class Error : public std::runtime_error {
 public:
  explicit Error(std::string msg) : std::runtime_error(std::move(msg)) {}
  Error(const SourceLoc& loc, const std::string& msg)
      : std::runtime_error(loc.str() + ": " + msg), loc_(loc) {}
  const SourceLoc& where() const { return loc_; }

 private:
  SourceLoc loc_;
};

}  // namespace tfs

#endif
