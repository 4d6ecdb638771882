#pragma once

#include "dwgp/errors.hpp"
#include "dwgp/core.hpp"
#include "dwgp/elliptic.hpp"
#include "dwgp/tridiagonal.hpp"
#include "dwgp/parallel.hpp"
#include "dwgp/spectral.hpp"
#include "dwgp/twomode.hpp"
#include "dwgp/gpe.hpp"
#include "dwgp/io.hpp"
#include "dwgp/cli.hpp"
