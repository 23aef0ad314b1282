#pragma once

#include "proin/net.hpp"
#include "proin/scene.hpp"

#include <string>

namespace proin::cli {

// Static SVG with one panel per attention record set (M2A_e, M2A_s, then one
// per mode for M2A_m). Each panel draws lanes, histories, ground truth when
// present, the predicted modes, and a dot on every attended lane node with
// area proportional to its weight. `focal_scene` and `prediction` share the
// focal frame.
std::string attention_svg(const Scene& focal_scene, const Prediction& prediction);

}  // namespace proin::cli
