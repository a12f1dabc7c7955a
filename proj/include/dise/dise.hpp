#pragma once

#include "dise/data.hpp"
#include "dise/errors.hpp"
#include "dise/gradcheck.hpp"
#include "dise/loss.hpp"
#include "dise/metrics.hpp"
#include "dise/model.hpp"
#include "dise/optim.hpp"
#include "dise/random.hpp"
#include "dise/sample.hpp"
#include "dise/serialize.hpp"
