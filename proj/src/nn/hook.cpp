#include <cstdlib>
#include <string>

#include "planeloc/nn/graph.hpp"

namespace planeloc::nn {

// Read once; the hook is a process-lifetime setting.
const std::string& break_backward_target() {
  static const std::string target = [] {
    const char* v = std::getenv("PLANELOC_BREAK_BACKWARD");
    return std::string(v ? v : "");
  }();
  return target;
}

}  // namespace planeloc::nn
