#pragma once

#include "densfix/errors.hpp"
#include "densfix/rng.hpp"
#include "densfix/tensor.hpp"
#include "densfix/autodiff.hpp"
#include "densfix/priors.hpp"
#include "densfix/losses.hpp"
#include "densfix/models.hpp"
#include "densfix/data.hpp"
#include "densfix/metrics.hpp"
#include "densfix/training.hpp"
#include "densfix/asymptotics.hpp"
#include "densfix/experiments.hpp"
#include "densfix/config.hpp"
