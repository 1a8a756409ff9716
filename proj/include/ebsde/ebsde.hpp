#pragma once

#include "ebsde/config.hpp"
#include "ebsde/control.hpp"
#include "ebsde/discounted.hpp"
#include "ebsde/dynamics.hpp"
#include "ebsde/ergodic.hpp"
#include "ebsde/geometry.hpp"
#include "ebsde/hypotheses.hpp"
#include "ebsde/verification.hpp"
