#include <stdio.h>

void format_values(float a, float b, float c, char *out) {
    char tmp[16];
    sprintf(tmp, "%f %f %f", a, b, c);
    sprintf(out, "%s", tmp);
}
