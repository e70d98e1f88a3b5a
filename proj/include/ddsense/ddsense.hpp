#pragma once

#include "ddsense/engines.hpp"
#include "ddsense/errors.hpp"
#include "ddsense/fit.hpp"
#include "ddsense/io.hpp"
#include "ddsense/linalg.hpp"
#include "ddsense/protocols.hpp"
#include "ddsense/schedule.hpp"
#include "ddsense/sweep.hpp"
#include "ddsense/version.hpp"
