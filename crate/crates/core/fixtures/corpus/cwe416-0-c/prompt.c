#include <stdlib.h>

int sum_buffer(int n) {
    int *buf = calloc((size_t)n, sizeof(int));
    if (buf == NULL) {
        return -1;
    }
    int total = 0;
    for (int i = 0; i < n; i++) {
        total += buf[i];
    }
    free(buf);
    return total + buf[0];
}
