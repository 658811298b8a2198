#pragma once

#include "wmvac/autodiff.hpp"
#include "wmvac/compositor.hpp"
#include "wmvac/experiments.hpp"
#include "wmvac/gradcheck.hpp"
#include "wmvac/hash.hpp"
#include "wmvac/imaging.hpp"
#include "wmvac/jpeg.hpp"
#include "wmvac/metrics.hpp"
#include "wmvac/optim.hpp"
#include "wmvac/parallel.hpp"
#include "wmvac/removal_net.hpp"
#include "wmvac/report.hpp"
#include "wmvac/rng.hpp"
#include "wmvac/tensor.hpp"
#include "wmvac/transforms.hpp"
#include "wmvac/vaccine.hpp"
