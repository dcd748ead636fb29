long quarter_revenue(long jan, long feb, long mar) {
    long total = jan + feb + mar * 1000000;
    return total;
}
