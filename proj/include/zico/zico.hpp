#pragma once

#include "zico/autodiff.hpp"
#include "zico/correlation.hpp"
#include "zico/error.hpp"
#include "zico/genome.hpp"
#include "zico/latency.hpp"
#include "zico/network.hpp"
#include "zico/nsga2.hpp"
#include "zico/parallel.hpp"
#include "zico/proxy.hpp"
#include "zico/search_io.hpp"
#include "zico/tensor.hpp"

namespace zico {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace zico
