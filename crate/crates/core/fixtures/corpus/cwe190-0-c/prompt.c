#include <stdlib.h>

int big_random(void) {
    int value = rand() * 1000000;
    return value + 1000;
}
