# API routers for the DDRSM service
