#include "idnf/rng.hpp"

#include <bit>
#include <sstream>

#include "idnf/errors.hpp"

namespace idnf {

// Textual state: seed, spare-pair flag, spare bits (exact), then the
// mt19937_64 state in its standard stream format.
std::string RandomSource::serialize() const {
  std::ostringstream out;
  out << "rng1 " << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' '
      << std::bit_cast<std::uint64_t>(spare_) << ' ' << eng_;
  return out.str();
}

RandomSource RandomSource::deserialize(const std::string& blob) {
  std::istringstream in(blob);
  std::string tag;
  std::uint64_t seed = 0, spare_bits = 0;
  int has_spare = 0;
  in >> tag >> seed >> has_spare >> spare_bits;
  if (!in || tag != "rng1") throw IoError("RandomSource: bad serialized state");
  RandomSource r(seed);
  in >> r.eng_;
  if (!in) throw IoError("RandomSource: bad engine state");
  r.has_spare_ = has_spare != 0;
  r.spare_ = std::bit_cast<double>(spare_bits);
  return r;
}

}  // namespace idnf
