#ifndef VSR_VERSION_HPP
#define VSR_VERSION_HPP

namespace vsr {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kToolName = "vsr";

}  // namespace vsr

#endif  // VSR_VERSION_HPP
