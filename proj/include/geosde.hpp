#pragma once

#include "geosde/cli.hpp"
#include "geosde/core.hpp"
#include "geosde/csv.hpp"
#include "geosde/development.hpp"
#include "geosde/driver.hpp"
#include "geosde/estimators.hpp"
#include "geosde/geometry.hpp"
#include "geosde/malliavin.hpp"
#include "geosde/manifold.hpp"
#include "geosde/mc.hpp"
#include "geosde/polynomial.hpp"
#include "geosde/sde.hpp"
#include "geosde/transport.hpp"
