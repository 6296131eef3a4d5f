#include <stdio.h>
#include <stdlib.h>
#include "ccopf.h"

int main(int argc, char **argv) {
  if (argc < 2) return 2;
  CcopfCase *c = NULL;
  if (ccopf_case_load(argv[1], &c) != CCOPF_STATUS_OK) return 3;
  CcopfDims d;
  ccopf_case_dims(c, &d);
  double *phi = malloc(d.dim_phi * sizeof(double));
  double *x = malloc(d.dim_x * sizeof(double));
  double *u = malloc(d.dim_u * sizeof(double));
  ccopf_case_nominal_loads(c, phi, d.dim_phi);
  for (size_t i = 0; i < d.n_gen; i++) x[i] = 1.0;
  for (size_t i = d.n_gen; i < d.dim_x; i++) x[i] = 0.0;
  CcopfPfSummary s;
  CcopfStatus st = ccopf_pf_solve(c, x, d.dim_x, phi, d.dim_phi, u, d.dim_u, &s);
  CcopfStatus bad = ccopf_pf_solve(c, x, d.dim_x - 1, phi, d.dim_phi, u, d.dim_u, NULL);
  char msg[256];
  ccopf_last_error(msg, sizeof msg);
  printf("%d %zu %zu %.6f %d %s\n", (int)st, d.n_bus, d.dim_x, s.cost, (int)bad, msg);
  free(phi); free(x); free(u);
  ccopf_case_free(c);
  return 0;
}
