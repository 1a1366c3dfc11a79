#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "steerlab/hooks.hpp"

namespace steerlab {

/// One residual-stream (or branch-output) vector with its provenance.
struct ActivationRecord {
    std::vector<float> vector;
    std::size_t layer = 0;
    Site site = Site::resid_pre;
    std::size_t position = 0;
    std::string sample_id;
    std::string dataset_id;
};

}  // namespace steerlab
