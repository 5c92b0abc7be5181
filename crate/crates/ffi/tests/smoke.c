#include <stdio.h>
#include <stdlib.h>
#include <math.h>

#include "inversemark.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        ImStatus st_ = (call);                                               \
        if (st_ != IM_STATUS_OK) {                                           \
            fprintf(stderr, "%s: status %d: %s\n", #call, (int)st_,          \
                    im_last_error());                                        \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(int argc, char **argv) {
    ImPipeline *p = NULL;
    ImKey *key = NULL;
    ImImage *cover = NULL, *marked = NULL;
    ImExtraction result;
    size_t side = 0, i, n;
    double *pixels, psnr = 0.0;

    if (argc != 2) {
        return 2;
    }
    if (im_pipeline_new(NULL, "bogus", NULL, &p) != IM_STATUS_INVALID_ARGUMENT || im_last_error() == NULL) {
        return 3;
    }
    CHECK(im_pipeline_new(argv[1], "linear", "analytic", &p));
    CHECK(im_pipeline_resolution(p, &side));
    CHECK(im_key_generate(p, IM_INJECTOR_GAUSSIAN_SHADING, 0, NULL, 0, &key));

    n = 3 * side * side;
    pixels = malloc(n * sizeof *pixels);
    for (i = 0; i < n; i++) {
        size_t x = i % side, y = (i / side) % side;
        pixels[i] = 0.5 + 0.3 * sin(0.07 * (double)x) * cos(0.05 * (double)y);
    }
    CHECK(im_image_new(3, side, side, pixels, &cover));
    free(pixels);
    CHECK(im_embed(p, key, cover, 11, &marked, &psnr, NULL));
    CHECK(im_extract(p, key, marked, &result, NULL, 0));
    printf("version %s psnr %.2f\n", im_version(), psnr);
    printf("accuracy %f over %zu bits\n", result.score, result.bit_count);

    im_image_free(marked);
    im_image_free(cover);
    im_key_free(key);
    im_pipeline_free(p);
    return 0;
}
